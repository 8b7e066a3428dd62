//! Grid optimization of commutation values.
//!
//! The design variables are the share vectors `f_i` at `N` electrical grid
//! angles over one tooth. At the nominal velocity each control sample
//! advances exactly one grid point, so the torque error between samples can
//! be written linearly in the `f_i`: each sample interval is cut into `M`
//! subsamples, and subsample `(k, j)` contributes the row
//! `g(phi(k Ts + j Ts / M)) . f_k - target`. The program
//!
//! ```text
//! minimize    sum_i sum_c f_ic  +  beta * || A F - target ||_2
//! subject to  g(theta_i) . f_i = target,   f_i >= 0
//! ```
//!
//! trades power against inter-sample ripple while linearizing the motor
//! exactly at the samples.
//!
//! The solver runs an accelerated projected gradient method with exact
//! projections onto the per-point polytopes, then polishes the result with
//! Newton steps on the identified active face. `A^T A` is block diagonal
//! (each row touches one grid point), so the reduced Hessian is a block
//! diagonal matrix minus a rank-one term.

use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::commutation::CommutationTable;
use crate::motor::{dot, ModelError, TorqueGainModel, COILS};

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("grid needs at least 2 points, got {0}")]
    GridSize(usize),
    #[error("invalid problem parameter: {0}")]
    Parameter(String),
    #[error("no nonnegative currents produce torque {target} at grid point {point} (g = {gains:?}); coil coverage is inadequate")]
    Infeasible {
        point: usize,
        gains: [f64; COILS],
        target: f64,
    },
    #[error("solver did not converge after {} iterations (objective {:.12e}, projected gradient {:.3e}, equality residual {:.3e})",
        .0.iterations, .0.objective, .0.projected_gradient, .0.equality_residual)]
    NotConverged(Box<RippleSolution>),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Sign of the unit torque a problem is solved for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TorqueSign {
    Positive,
    Negative,
}

impl TorqueSign {
    pub fn target(self) -> f64 {
        match self {
            TorqueSign::Positive => 1.0,
            TorqueSign::Negative => -1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TorqueSign::Positive => "positive",
            TorqueSign::Negative => "negative",
        }
    }
}

/// `N` electrical angles `-pi + 2 pi i / N`.
pub fn build_grid(n: usize) -> Result<Vec<f64>, SolveError> {
    if n < 2 {
        return Err(SolveError::GridSize(n));
    }
    Ok((0..n).map(|i| -PI + TAU * i as f64 / n as f64).collect())
}

/// Velocity (mechanical rad/s) at which one sample advances one grid point.
pub fn nominal_velocity(n_teeth: u32, n: usize, ts: f64) -> f64 {
    TAU / (f64::from(n_teeth) * n as f64 * ts)
}

/// One subsample row of the ripple matrix: `gain . f_point - target`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubsampleRow {
    pub point: usize,
    pub gain: [f64; COILS],
}

#[derive(Debug, Clone)]
pub struct RippleProblem {
    model: TorqueGainModel,
    n: usize,
    m: usize,
    beta: f64,
    ts: f64,
    velocity: f64,
    sign: TorqueSign,
    grid: Vec<f64>,
    grid_gains: Vec<[f64; COILS]>,
    rows: Vec<SubsampleRow>,
}

impl RippleProblem {
    pub fn assemble(
        model: &TorqueGainModel,
        n: usize,
        m: usize,
        beta: f64,
        ts: f64,
        sign: TorqueSign,
    ) -> Result<Self, SolveError> {
        if m < 1 {
            return Err(SolveError::Parameter(format!(
                "M must be at least 1, got {m}"
            )));
        }
        if !(beta >= 0.0) || !beta.is_finite() {
            return Err(SolveError::Parameter(format!(
                "beta must be finite and >= 0, got {beta}"
            )));
        }
        if !(ts > 0.0) || !ts.is_finite() {
            return Err(SolveError::Parameter(format!(
                "Ts must be positive, got {ts}"
            )));
        }
        model.ensure_valid()?;
        let grid = build_grid(n)?;
        let n_teeth = f64::from(model.n_teeth());
        let velocity = nominal_velocity(model.n_teeth(), n, ts);
        let target = sign.target();
        let grid_gains: Vec<[f64; COILS]> =
            grid.iter().map(|&t| model.eval_g_electrical(t)).collect();
        for (point, g) in grid_gains.iter().enumerate() {
            if !g.iter().any(|gc| gc * target > 0.0) {
                return Err(SolveError::Infeasible {
                    point,
                    gains: *g,
                    target,
                });
            }
        }
        let phi0 = grid[0] / n_teeth;
        let sub = ts / m as f64;
        let mut rows = Vec::with_capacity(n * m + 1);
        for k in 0..n {
            for j in 0..m {
                let t = k as f64 * ts + j as f64 * sub;
                rows.push(SubsampleRow {
                    point: k,
                    gain: model.eval_g(phi0 + velocity * t),
                });
            }
        }
        // t = N Ts closes the period and reuses grid point 0.
        rows.push(SubsampleRow {
            point: 0,
            gain: model.eval_g(phi0 + velocity * n as f64 * ts),
        });
        Ok(Self {
            model: model.clone(),
            n,
            m,
            beta,
            ts,
            velocity,
            sign,
            grid,
            grid_gains,
            rows,
        })
    }

    pub fn model(&self) -> &TorqueGainModel {
        &self.model
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn m(&self) -> usize {
        self.m
    }
    pub fn beta(&self) -> f64 {
        self.beta
    }
    pub fn ts(&self) -> f64 {
        self.ts
    }
    pub fn velocity(&self) -> f64 {
        self.velocity
    }
    pub fn sign(&self) -> TorqueSign {
        self.sign
    }
    pub fn target(&self) -> f64 {
        self.sign.target()
    }
    pub fn grid(&self) -> &[f64] {
        &self.grid
    }
    pub fn grid_gains(&self) -> &[[f64; COILS]] {
        &self.grid_gains
    }
    pub fn rows(&self) -> &[SubsampleRow] {
        &self.rows
    }

    /// Same problem with a different ripple weight.
    pub fn with_beta(&self, beta: f64) -> Result<Self, SolveError> {
        if !(beta >= 0.0) || !beta.is_finite() {
            return Err(SolveError::Parameter(format!(
                "beta must be finite and >= 0, got {beta}"
            )));
        }
        Ok(Self {
            beta,
            ..self.clone()
        })
    }

    /// `A F - target`, one entry per subsample row.
    pub fn residuals(&self, f: &[[f64; COILS]]) -> Vec<f64> {
        let target = self.target();
        self.rows
            .iter()
            .map(|row| dot(&row.gain, &f[row.point]) - target)
            .collect()
    }

    /// Relative ripple `(A F - target) / target`.
    pub fn relative_residuals(&self, f: &[[f64; COILS]]) -> Vec<f64> {
        let target = self.target();
        self.residuals(f).into_iter().map(|r| r / target).collect()
    }

    pub fn power(&self, f: &[[f64; COILS]]) -> f64 {
        f.iter().flatten().sum()
    }

    pub fn ripple(&self, f: &[[f64; COILS]]) -> f64 {
        norm(&self.residuals(f))
    }

    pub fn objective(&self, f: &[[f64; COILS]]) -> f64 {
        self.power(f) + self.beta * self.ripple(f)
    }

    /// `max_i |g(theta_i) . f_i - target|`.
    pub fn equality_residual(&self, f: &[[f64; COILS]]) -> f64 {
        let target = self.target();
        self.grid_gains
            .iter()
            .zip(f)
            .map(|(g, fi)| (dot(g, fi) - target).abs())
            .fold(0.0, f64::max)
    }

    /// Solution of the decoupled problem at `beta = 0`.
    pub fn per_point_solution(&self) -> Vec<[f64; COILS]> {
        let target = self.target();
        self.grid_gains
            .iter()
            .map(|g| per_point_lp(*g, target).expect("feasibility checked at assembly"))
            .collect()
    }

    fn gradient(&self, f: &[[f64; COILS]], r: &[f64], rnorm: f64) -> Vec<[f64; COILS]> {
        let mut grad = vec![[1.0; COILS]; self.n];
        if self.beta > 0.0 && rnorm > 0.0 {
            let s = self.beta / rnorm;
            for (row, ri) in self.rows.iter().zip(r) {
                let gi = &mut grad[row.point];
                for c in 0..COILS {
                    gi[c] += s * ri * row.gain[c];
                }
            }
        }
        debug_assert_eq!(f.len(), self.n);
        grad
    }

    fn evaluate(&self, f: &[[f64; COILS]]) -> Eval {
        let r = self.residuals(f);
        let rnorm = norm(&r);
        let objective = self.power(f) + self.beta * rnorm;
        Eval {
            objective,
            r,
            rnorm,
        }
    }

    /// `max_i || f_i - P_i(f_i - grad_i) ||_inf`; zero exactly at a KKT point.
    fn projected_gradient(&self, f: &[[f64; COILS]], grad: &[[f64; COILS]]) -> f64 {
        let target = self.target();
        let mut worst: f64 = 0.0;
        for ((fi, gi), gain) in f.iter().zip(grad).zip(&self.grid_gains) {
            let y = [0, 1, 2].map(|c| fi[c] - gi[c]);
            let p = project_feasible(y, *gain, target).expect("feasibility checked at assembly");
            for c in 0..COILS {
                worst = worst.max((fi[c] - p[c]).abs());
            }
        }
        worst
    }

    /// Wrap a solution as an interpolating commutation table.
    pub fn to_table(
        &self,
        positive: &RippleSolution,
        negative: Option<&RippleSolution>,
    ) -> Result<CommutationTable, crate::commutation::CommutationError> {
        CommutationTable::new(
            self.model.geometry(),
            self.grid.clone(),
            positive.values.clone(),
            negative.map(|s| s.values.clone()),
        )
    }
}

struct Eval {
    objective: f64,
    r: Vec<f64>,
    rnorm: f64,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Euclidean projection of `y` onto `{f >= 0, g . f = target}`.
///
/// Enumerates which of the three nonnegativity constraints are active; for
/// each choice the projection onto the remaining hyperplane is closed form,
/// and the nearest feasible candidate is the projection.
pub fn project_feasible(
    y: [f64; COILS],
    g: [f64; COILS],
    target: f64,
) -> Result<[f64; COILS], SolveError> {
    let mut best: Option<([f64; COILS], f64)> = None;
    for mask in 0u8..7 {
        // bit c set: coil c pinned at zero
        let free: Vec<usize> = (0..COILS).filter(|c| mask & (1 << c) == 0).collect();
        let gg: f64 = free.iter().map(|&c| g[c] * g[c]).sum();
        if gg == 0.0 {
            continue;
        }
        let gy: f64 = free.iter().map(|&c| g[c] * y[c]).sum();
        let lambda = (target - gy) / gg;
        let mut f = [0.0; COILS];
        for &c in &free {
            f[c] = y[c] + lambda * g[c];
        }
        if f.iter().any(|v| *v < 0.0) {
            continue;
        }
        let dist: f64 = (0..COILS).map(|c| (f[c] - y[c]).powi(2)).sum();
        if best.map_or(true, |(_, d)| dist < d) {
            best = Some((f, dist));
        }
    }
    best.map(|(f, _)| f).ok_or(SolveError::Infeasible {
        point: 0,
        gains: g,
        target,
    })
}

/// Minimum-power shares producing `target` torque at one angle: all current
/// on the coil with the largest gain of the right sign (lowest index on ties).
pub fn per_point_lp(g: [f64; COILS], target: f64) -> Result<[f64; COILS], SolveError> {
    let sign = target.signum();
    let mut best = 0;
    for c in 1..COILS {
        if g[c] * sign > g[best] * sign {
            best = c;
        }
    }
    if !(g[best] * sign > 0.0) {
        return Err(SolveError::Infeasible {
            point: 0,
            gains: g,
            target,
        });
    }
    let mut f = [0.0; COILS];
    f[best] = target / g[best];
    Ok(f)
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    /// Cap on projected-gradient iterations before the Newton phase.
    pub max_gradient_iterations: usize,
    /// Cap on Newton iterations.
    pub max_newton_iterations: usize,
    /// Relative objective decrease over `window` iterations counted as stalled.
    pub rel_tol: f64,
    pub window: usize,
    /// Required `max || f - P(f - grad) ||_inf`.
    pub pg_tol: f64,
    /// Required `max_i |g_i . f_i - target|`.
    pub eq_tol: f64,
    /// Relative decrease at which the gradient phase hands over to Newton.
    pub handover_rel_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_gradient_iterations: 20_000,
            max_newton_iterations: 500,
            rel_tol: 1e-10,
            window: 5,
            pg_tol: 1e-8,
            eq_tol: 1e-10,
            handover_rel_tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RippleSolution {
    /// Optimal shares per grid point (A^2/Nm).
    pub values: Vec<[f64; COILS]>,
    pub objective: f64,
    /// `||F||_1`.
    pub power: f64,
    /// `||A F - target||_2`.
    pub ripple: f64,
    pub equality_residual: f64,
    pub projected_gradient: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn finish(problem: &RippleProblem, values: Vec<[f64; COILS]>, iterations: usize) -> RippleSolution {
    let e = problem.evaluate(&values);
    let grad = problem.gradient(&values, &e.r, e.rnorm);
    let projected_gradient = problem.projected_gradient(&values, &grad);
    RippleSolution {
        objective: e.objective,
        power: problem.power(&values),
        ripple: e.rnorm,
        equality_residual: problem.equality_residual(&values),
        projected_gradient,
        iterations,
        converged: false,
        values,
    }
}

/// Solve the ripple program; `warm_start` is projected onto the feasible set.
pub fn solve(
    problem: &RippleProblem,
    options: &SolverOptions,
    warm_start: Option<&[[f64; COILS]]>,
) -> Result<RippleSolution, SolveError> {
    let target = problem.target();
    let mut x: Vec<[f64; COILS]> = match warm_start {
        Some(w) if w.len() == problem.n => w
            .iter()
            .zip(&problem.grid_gains)
            .enumerate()
            .map(|(point, (fi, g))| {
                project_feasible(*fi, *g, target).map_err(|_| SolveError::Infeasible {
                    point,
                    gains: *g,
                    target,
                })
            })
            .collect::<Result<_, _>>()?,
        Some(w) => {
            return Err(SolveError::Parameter(format!(
                "warm start has {} rows, problem has {}",
                w.len(),
                problem.n
            )))
        }
        None => problem.per_point_solution(),
    };

    if problem.beta == 0.0 {
        // Separable LP; the per-point vertex is optimal.
        let mut sol = finish(problem, problem.per_point_solution(), 0);
        sol.converged = true;
        return Ok(sol);
    }

    let mut history: Vec<f64> = Vec::new();
    let iterations = accelerated_gradient(problem, options, &mut x, &mut history);
    let (x, newton_iterations, converged) = newton_polish(problem, options, x, &mut history);

    let mut sol = finish(problem, x, iterations + newton_iterations);
    sol.converged = converged
        && sol.projected_gradient <= options.pg_tol
        && sol.equality_residual <= options.eq_tol;
    if sol.converged {
        Ok(sol)
    } else {
        Err(SolveError::NotConverged(Box::new(sol)))
    }
}

fn relative_decrease(history: &[f64], window: usize) -> f64 {
    if history.len() < 2 {
        return f64::INFINITY;
    }
    let last = history[history.len() - 1];
    let back = window.min(history.len() - 1);
    let earlier = history[history.len() - 1 - back];
    (earlier - last) / last.abs().max(f64::MIN_POSITIVE)
}

fn project_all(problem: &RippleProblem, y: &[[f64; COILS]]) -> Vec<[f64; COILS]> {
    let target = problem.target();
    y.iter()
        .zip(&problem.grid_gains)
        .map(|(yi, g)| project_feasible(*yi, *g, target).expect("feasibility checked at assembly"))
        .collect()
}

/// FISTA with backtracking and function-value restart. Returns the number of
/// iterations; `x` holds the best feasible iterate.
fn accelerated_gradient(
    problem: &RippleProblem,
    options: &SolverOptions,
    x: &mut Vec<[f64; COILS]>,
    history: &mut Vec<f64>,
) -> usize {
    let mut ex = problem.evaluate(x);
    history.push(ex.objective);
    // Curvature of beta ||r|| is bounded by beta * lambda_max(A^T A) / ||r||.
    let mut traces = vec![0.0f64; problem.n];
    for row in &problem.rows {
        traces[row.point] += dot(&row.gain, &row.gain);
    }
    let block_bound = traces.iter().copied().fold(0.0, f64::max);
    let mut lipschitz = (problem.beta * block_bound / ex.rnorm.max(1e-12)).max(1e-6) * 0.1;

    let mut y = x.clone();
    let mut t = 1.0f64;
    let mut y_is_x = true;
    let mut it = 0;
    while it < options.max_gradient_iterations {
        it += 1;
        let ey = if y_is_x {
            Eval {
                objective: ex.objective,
                r: ex.r.clone(),
                rnorm: ex.rnorm,
            }
        } else {
            problem.evaluate(&y)
        };
        let gy = problem.gradient(&y, &ey.r, ey.rnorm);
        let (z, ez) = loop {
            let step: Vec<[f64; COILS]> = y
                .iter()
                .zip(&gy)
                .map(|(yi, gi)| [0, 1, 2].map(|c| yi[c] - gi[c] / lipschitz))
                .collect();
            let z = project_all(problem, &step);
            let ez = problem.evaluate(&z);
            let mut lin = 0.0;
            let mut quad = 0.0;
            for ((zi, yi), gi) in z.iter().zip(&y).zip(&gy) {
                for c in 0..COILS {
                    let d = zi[c] - yi[c];
                    lin += gi[c] * d;
                    quad += d * d;
                }
            }
            let bound = ey.objective + lin + 0.5 * lipschitz * quad;
            if ez.objective <= bound + 1e-14 * ey.objective.abs() || lipschitz > 1e300 {
                break (z, ez);
            }
            lipschitz *= 2.0;
        };
        if ez.objective > ex.objective && !y_is_x {
            // momentum overshoot: restart from the current iterate
            t = 1.0;
            y.clone_from(x);
            y_is_x = true;
            continue;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let momentum = (t - 1.0) / t_next;
        let improved = ez.objective <= ex.objective;
        y = z
            .iter()
            .zip(x.iter())
            .map(|(zi, xi)| [0, 1, 2].map(|c| zi[c] + momentum * (zi[c] - xi[c])))
            .collect();
        y_is_x = momentum == 0.0;
        if improved {
            *x = z;
            ex = ez;
        }
        t = t_next;
        lipschitz *= 0.9;
        history.push(ex.objective);
        if history.len() > options.window
            && relative_decrease(history, options.window) < options.handover_rel_tol
        {
            break;
        }
    }
    it
}

/// Orthonormal basis (embedded in R^3) of `{d : d_c = 0 for active c, g . d = 0}`.
fn face_basis(g: &[f64; COILS], active: &[bool; COILS]) -> Vec<[f64; COILS]> {
    let free: Vec<usize> = (0..COILS).filter(|&c| !active[c]).collect();
    match free.len() {
        2 => {
            let (a, b) = (free[0], free[1]);
            let len = (g[a] * g[a] + g[b] * g[b]).sqrt();
            let mut v = [0.0; COILS];
            if len == 0.0 {
                v[a] = 1.0;
                return vec![v, {
                    let mut w = [0.0; COILS];
                    w[b] = 1.0;
                    w
                }];
            }
            v[a] = g[b] / len;
            v[b] = -g[a] / len;
            vec![v]
        }
        3 => {
            let len = dot(g, g).sqrt();
            if len == 0.0 {
                return vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
            }
            let n = g.map(|v| v / len);
            let j = (0..COILS)
                .min_by(|&a, &b| n[a].abs().total_cmp(&n[b].abs()))
                .unwrap_or(0);
            let mut v1 = [0.0; COILS];
            v1[j] = 1.0;
            for c in 0..COILS {
                v1[c] -= n[j] * n[c];
            }
            let l1 = dot(&v1, &v1).sqrt();
            let v1 = v1.map(|v| v / l1);
            let v2 = [
                n[1] * v1[2] - n[2] * v1[1],
                n[2] * v1[0] - n[0] * v1[2],
                n[0] * v1[1] - n[1] * v1[0],
            ];
            vec![v1, v2]
        }
        _ => Vec::new(),
    }
}

/// Primal active-set Newton iterations on the face identified by the
/// gradient phase. Returns the final iterate, iteration count and whether
/// the stopping test passed.
fn newton_polish(
    problem: &RippleProblem,
    options: &SolverOptions,
    mut x: Vec<[f64; COILS]>,
    history: &mut Vec<f64>,
) -> (Vec<[f64; COILS]>, usize, bool) {
    let n = problem.n;
    let target = problem.target();
    let mut active: Vec<[bool; COILS]> = x.iter().map(|fi| fi.map(|v| v == 0.0)).collect();

    // Per-point blocks of A^T A.
    let mut blocks = vec![[[0.0; COILS]; COILS]; n];
    for row in &problem.rows {
        let b = &mut blocks[row.point];
        for a in 0..COILS {
            for c in 0..COILS {
                b[a][c] += row.gain[a] * row.gain[c];
            }
        }
    }

    let mut converged = false;
    let mut it = 0;
    while it < options.max_newton_iterations {
        it += 1;
        let e = problem.evaluate(&x);
        let grad = problem.gradient(&x, &e.r, e.rnorm);
        let pg = problem.projected_gradient(&x, &grad);
        let eq = problem.equality_residual(&x);
        if pg <= options.pg_tol
            && eq <= options.eq_tol
            && relative_decrease(history, options.window) < options.rel_tol
        {
            converged = true;
            break;
        }

        // Reduced coordinates.
        let bases: Vec<Vec<[f64; COILS]>> = (0..n)
            .map(|i| face_basis(&problem.grid_gains[i], &active[i]))
            .collect();
        let offsets: Vec<usize> = bases
            .iter()
            .scan(0, |acc, b| {
                let o = *acc;
                *acc += b.len();
                Some(o)
            })
            .collect();
        let dim: usize = bases.iter().map(Vec::len).sum();

        let q_tol = 0.1 * options.pg_tol;
        let mut q = DVector::<f64>::zeros(dim);
        for i in 0..n {
            for (a, z) in bases[i].iter().enumerate() {
                q[offsets[i] + a] = dot(z, &grad[i]);
            }
        }

        let qmax = q.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if dim == 0 || qmax <= q_tol {
            // Stationary on the face: release constraints with negative multipliers.
            let mut released = false;
            for i in 0..n {
                let g = &problem.grid_gains[i];
                let free: Vec<usize> = (0..COILS).filter(|&c| !active[i][c]).collect();
                let gg: f64 = free.iter().map(|&c| g[c] * g[c]).sum();
                let nu = if gg > 0.0 {
                    free.iter().map(|&c| grad[i][c] * g[c]).sum::<f64>() / gg
                } else {
                    0.0
                };
                let mut worst: Option<(usize, f64)> = None;
                for c in 0..COILS {
                    if active[i][c] {
                        let lambda = grad[i][c] - nu * g[c];
                        if lambda < -q_tol && worst.map_or(true, |(_, l)| lambda < l) {
                            worst = Some((c, lambda));
                        }
                    }
                }
                if let Some((c, _)) = worst {
                    active[i][c] = false;
                    released = true;
                }
            }
            if released {
                continue;
            }
            // KKT holds to tolerance; let the objective history settle.
            history.push(e.objective);
            if relative_decrease(history, options.window) < options.rel_tol
                && pg <= options.pg_tol
                && eq <= options.eq_tol
            {
                converged = true;
                break;
            }
            if it > options.window + 1 && pg > options.pg_tol {
                // Cannot make further progress at working precision.
                break;
            }
            continue;
        }

        // Reduced Hessian s (Z^T D Z - (Z^T w)(Z^T w)^T) with s = beta / ||r||.
        let s = problem.beta / e.rnorm;
        let mut w = vec![[0.0; COILS]; n];
        for (row, ri) in problem.rows.iter().zip(&e.r) {
            for c in 0..COILS {
                w[row.point][c] += ri * row.gain[c] / e.rnorm;
            }
        }
        let mut zw = DVector::<f64>::zeros(dim);
        let mut hess = DMatrix::<f64>::zeros(dim, dim);
        for i in 0..n {
            let b = &blocks[i];
            for (a, za) in bases[i].iter().enumerate() {
                zw[offsets[i] + a] = dot(za, &w[i]);
                let bza = [0, 1, 2].map(|r| dot(&b[r], za));
                for (c, zc) in bases[i].iter().enumerate() {
                    hess[(offsets[i] + a, offsets[i] + c)] = s * dot(zc, &bza);
                }
            }
        }
        hess.ger(-s, &zw, &zw, 1.0);

        let diag_max = hess.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut damping = 1e-12 * diag_max.max(1e-300);
        let step = loop {
            let mut h = hess.clone();
            for k in 0..dim {
                h[(k, k)] += damping;
            }
            if let Some(chol) = h.cholesky() {
                break chol.solve(&(-&q));
            }
            damping *= 100.0;
            if damping > 1e6 * diag_max.max(1.0) {
                break -&q;
            }
        };
        let mut slope = q.dot(&step);
        let step = if slope < 0.0 {
            step
        } else {
            slope = -q.dot(&q);
            -q.clone()
        };

        let mut d = vec![[0.0; COILS]; n];
        for i in 0..n {
            for (a, z) in bases[i].iter().enumerate() {
                for c in 0..COILS {
                    d[i][c] += step[offsets[i] + a] * z[c];
                }
            }
        }

        // Ratio test against the free nonnegativity constraints.
        let mut alpha_max = f64::INFINITY;
        let mut blocking: Option<(usize, usize)> = None;
        for i in 0..n {
            for c in 0..COILS {
                if !active[i][c] && d[i][c] < 0.0 {
                    let a = x[i][c] / -d[i][c];
                    if a < alpha_max {
                        alpha_max = a;
                        blocking = Some((i, c));
                    }
                }
            }
        }

        let mut alpha = alpha_max.min(1.0);
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<[f64; COILS]> = x
                .iter()
                .zip(&d)
                .map(|(xi, di)| [0, 1, 2].map(|c| (xi[c] + alpha * di[c]).max(0.0)))
                .collect();
            let et = problem.evaluate(&trial);
            if et.objective <= e.objective + 1e-4 * alpha * slope {
                accepted = Some(trial);
                break;
            }
            alpha *= 0.5;
        }
        let Some(mut trial) = accepted else {
            history.push(e.objective);
            if pg <= options.pg_tol && eq <= options.eq_tol {
                converged = true;
            }
            break;
        };
        if alpha == alpha_max {
            if let Some((i, c)) = blocking {
                trial[i][c] = 0.0;
                active[i][c] = true;
            }
        }
        // Restore exact feasibility of the points that moved.
        for i in 0..n {
            if d[i].iter().any(|v| *v != 0.0) {
                let p = project_feasible(trial[i], problem.grid_gains[i], target)
                    .expect("feasibility checked at assembly");
                for c in 0..COILS {
                    if p[c] == 0.0 {
                        active[i][c] = true;
                    }
                }
                trial[i] = p;
            }
        }
        x = trial;
        history.push(problem.evaluate(&x).objective);
    }
    (x, it, converged)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn grid_examples() {
        let g = build_grid(4).unwrap();
        assert_eq!(g, vec![-PI, -PI / 2.0, 0.0, PI / 2.0]);
        let g = build_grid(150).unwrap();
        assert_eq!(g.len(), 150);
        for w in g.windows(2) {
            assert_abs_diff_eq!(w[1] - w[0], TAU / 150.0, epsilon = 1e-14);
        }
        assert!(matches!(build_grid(1), Err(SolveError::GridSize(1))));
    }

    #[test]
    fn nominal_velocity_examples() {
        let v = nominal_velocity(131, 150, 0.001);
        assert_abs_diff_eq!(v, 0.319_754_977, epsilon = 1e-6);
        assert_abs_diff_eq!(v / (TAU / 131.0), 1000.0 / 150.0, epsilon = 1e-10);
        assert_abs_diff_eq!(nominal_velocity(1, 1, TAU), 1.0, epsilon = 1e-15);
        for (nt, n, ts) in [(7, 13, 0.3), (131, 150, 1e-3), (2, 1000, 1e-5)] {
            assert_abs_diff_eq!(
                nominal_velocity(nt, n, ts) * n as f64 * ts,
                TAU / nt as f64,
                epsilon = 1e-14
            );
        }
    }

    #[test]
    fn assemble_shape_and_alignment() {
        let model = TorqueGainModel::default_model();
        let p = RippleProblem::assemble(&model, 2, 2, 1.0, 1e-3, TorqueSign::Positive).unwrap();
        assert_eq!(p.rows().len(), 5);
        assert_eq!(p.rows()[4].point, 0);
        let p = RippleProblem::assemble(&model, 12, 5, 1.0, 1e-3, TorqueSign::Positive).unwrap();
        for (idx, row) in p.rows().iter().enumerate() {
            if idx % 5 == 0 {
                let g = p.grid_gains()[row.point];
                for c in 0..3 {
                    assert_abs_diff_eq!(row.gain[c], g[c], epsilon = 1e-12);
                }
            }
        }
        // any feasible point zeroes the j = 0 rows
        let f = p.per_point_solution();
        let r = p.residuals(&f);
        for k in 0..12 {
            assert!(r[k * 5].abs() <= 1e-12);
        }
        assert!(r[60].abs() <= 1e-12);
    }

    #[test]
    fn assemble_rejects_bad_parameters() {
        let model = TorqueGainModel::default_model();
        assert!(RippleProblem::assemble(&model, 1, 2, 1.0, 1e-3, TorqueSign::Positive).is_err());
        assert!(RippleProblem::assemble(&model, 4, 0, 1.0, 1e-3, TorqueSign::Positive).is_err());
        assert!(RippleProblem::assemble(&model, 4, 2, -1.0, 1e-3, TorqueSign::Positive).is_err());
        assert!(RippleProblem::assemble(&model, 4, 2, 1.0, 0.0, TorqueSign::Positive).is_err());
        let single = TorqueGainModel::new(
            131,
            [
                vec![crate::Harmonic {
                    order: 1,
                    amplitude: 1.0,
                    phase: 0.0,
                }],
                vec![],
                vec![],
            ],
        )
        .unwrap();
        assert!(matches!(
            RippleProblem::assemble(&single, 4, 2, 1.0, 1e-3, TorqueSign::Positive),
            Err(SolveError::Model(_))
        ));
    }

    #[test]
    fn projection_examples() {
        let f = project_feasible([0.0; 3], [1.0, 1.0, 1.0], 1.0).unwrap();
        for v in f {
            assert_abs_diff_eq!(v, 1.0 / 3.0, epsilon = 1e-15);
        }
        assert_eq!(
            project_feasible([0.0; 3], [1.0, 0.0, -1.0], 1.0).unwrap(),
            [1.0, 0.0, 0.0]
        );
        let y = [0.2, 0.3, 0.5];
        assert_eq!(project_feasible(y, [1.0, 1.0, 1.0], 1.0).unwrap(), y);
        assert!(project_feasible([0.0; 3], [-1.0, 0.0, -2.0], 1.0).is_err());
        assert!(project_feasible([0.0; 3], [1.0, 0.0, 2.0], -1.0).is_err());
    }

    #[test]
    fn per_point_lp_examples() {
        assert_eq!(
            per_point_lp([2.0, 0.5, -1.0], 1.0).unwrap(),
            [0.5, 0.0, 0.0]
        );
        assert_eq!(per_point_lp([1.0, 1.0, 1.0], 1.0).unwrap(), [1.0, 0.0, 0.0]);
        assert_eq!(
            per_point_lp([-2.0, 1.0, 0.0], -1.0).unwrap(),
            [0.5, 0.0, 0.0]
        );
        assert!(per_point_lp([-2.0, -1.0, 0.0], 1.0).is_err());
    }

    /// Vertex enumeration: an LP optimum over {f >= 0, g.f = t} sits on a
    /// single-coil vertex.
    fn lp_by_vertices(g: [f64; 3], t: f64) -> f64 {
        (0..3)
            .filter(|&c| g[c] * t > 0.0)
            .map(|c| t / g[c])
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn beta_zero_is_per_point_lp() {
        let model = TorqueGainModel::default_model();
        for sign in [TorqueSign::Positive, TorqueSign::Negative] {
            let p = RippleProblem::assemble(&model, 30, 4, 0.0, 1e-3, sign).unwrap();
            let sol = solve(&p, &SolverOptions::default(), None).unwrap();
            for (fi, g) in sol.values.iter().zip(p.grid_gains()) {
                let lp = per_point_lp(*g, sign.target()).unwrap();
                for c in 0..3 {
                    assert_abs_diff_eq!(fi[c], lp[c], epsilon = 1e-8);
                }
                assert_abs_diff_eq!(
                    fi.iter().sum::<f64>(),
                    lp_by_vertices(*g, sign.target()),
                    epsilon = 1e-12
                );
            }
        }
    }

    #[test]
    fn small_problem_converges_with_tight_residuals() {
        let model = TorqueGainModel::default_model();
        for beta in [1.0, 100.0] {
            let p =
                RippleProblem::assemble(&model, 24, 6, beta, 1e-3, TorqueSign::Positive).unwrap();
            let sol = solve(&p, &SolverOptions::default(), None).unwrap();
            assert!(sol.converged);
            assert!(sol.equality_residual <= 1e-10);
            assert!(sol.projected_gradient <= 1e-8);
            assert!(sol.values.iter().flatten().all(|v| *v >= 0.0));
            assert!(sol.objective <= p.objective(&p.per_point_solution()) + 1e-12);
        }
    }

    #[test]
    fn warm_start_reaches_same_optimum() {
        let model = TorqueGainModel::default_model();
        let p = RippleProblem::assemble(&model, 20, 5, 10.0, 1e-3, TorqueSign::Positive).unwrap();
        let cold = solve(&p, &SolverOptions::default(), None).unwrap();
        let warm = solve(&p, &SolverOptions::default(), Some(&cold.values)).unwrap();
        assert!((cold.objective - warm.objective).abs() <= 1e-9 * cold.objective);
        assert!(warm.iterations <= cold.iterations);
    }

    #[test]
    fn solve_is_deterministic() {
        let model = TorqueGainModel::default_model();
        let p = RippleProblem::assemble(&model, 20, 5, 50.0, 1e-3, TorqueSign::Negative).unwrap();
        let a = solve(&p, &SolverOptions::default(), None).unwrap();
        let b = solve(&p, &SolverOptions::default(), None).unwrap();
        assert_eq!(a.values, b.values);
        assert_eq!(a.objective.to_bits(), b.objective.to_bits());
    }

    #[test]
    fn iteration_cap_reports_best_iterate() {
        let model = TorqueGainModel::default_model();
        let p = RippleProblem::assemble(&model, 40, 8, 100.0, 1e-3, TorqueSign::Positive).unwrap();
        let opts = SolverOptions {
            max_gradient_iterations: 2,
            max_newton_iterations: 0,
            ..SolverOptions::default()
        };
        match solve(&p, &opts, None) {
            Err(SolveError::NotConverged(best)) => {
                assert!(best.equality_residual <= 1e-10);
                assert_eq!(best.values.len(), 40);
            }
            other => panic!("expected NotConverged, got {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn projection_is_feasible_and_idempotent(
            y in proptest::array::uniform3(-3.0f64..3.0),
            g in proptest::array::uniform3(-2.0f64..2.0),
        ) {
            prop_assume!(g.iter().any(|v| *v > 1e-3));
            let f = project_feasible(y, g, 1.0).unwrap();
            prop_assert!(f.iter().all(|v| *v >= 0.0));
            prop_assert!((dot(&g, &f) - 1.0).abs() <= 1e-12);
            let again = project_feasible(f, g, 1.0).unwrap();
            for c in 0..3 {
                prop_assert!((again[c] - f[c]).abs() <= 1e-12);
            }
            // no feasible vertex or sampled point is closer
            let d0: f64 = (0..3).map(|c| (f[c] - y[c]).powi(2)).sum();
            for c in 0..3 {
                if g[c] > 0.0 {
                    let mut v = [0.0; 3];
                    v[c] = 1.0 / g[c];
                    let d: f64 = (0..3).map(|k| (v[k] - y[k]).powi(2)).sum();
                    prop_assert!(d0 <= d * (1.0 + 1e-12) + 1e-12);
                }
            }
        }
    }
}
