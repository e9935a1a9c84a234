//! Generic numerical machinery shared by the game and control solvers.
//!
//! * [`rk_integrate`] is an adaptive Dormand–Prince 5(4) integrator with the
//!   pair's native 4th-order continuous extension for dense output. Spans may
//!   run forward or backward in time.
//! * [`shoot`] solves two-point boundary value problems by damped Newton
//!   iteration on the unknown initial values.
//! * [`backward_sweep`] integrates a matrix ODE from the terminal time back to
//!   the start and reports whether the solution stayed bounded.
//! * [`fd_jacobian`] is a central-difference Jacobian.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Tolerances and resolution settings shared by every solver in the crate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_steps: usize,
    /// Euclidean norm the terminal boundary residual must reach.
    pub shooting_tol: f64,
    pub shooting_max_iters: usize,
    /// Relative step for finite-difference sensitivities and Jacobians.
    pub fd_step: f64,
    /// Number of uniformly spaced samples in reported trajectories.
    pub output_points: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-8,
            abs_tol: 1e-10,
            max_steps: 1_000_000,
            shooting_tol: 1e-7,
            shooting_max_iters: 50,
            fd_step: 1e-6,
            output_points: 601,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("rel_tol", self.rel_tol),
            ("abs_tol", self.abs_tol),
            ("shooting_tol", self.shooting_tol),
            ("fd_step", self.fd_step),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::InvalidInput(format!("{name} must be positive, got {value}")));
            }
        }
        if self.max_steps == 0 || self.shooting_max_iters == 0 {
            return Err(Error::InvalidInput("step and iteration limits must be nonzero".into()));
        }
        if self.output_points < 2 {
            return Err(Error::InvalidInput(format!(
                "output_points must be at least 2, got {}",
                self.output_points
            )));
        }
        Ok(())
    }

    /// Copy of `self` with integration tolerances scaled by `factor`.
    pub fn tightened(&self, factor: f64) -> Self {
        Self { rel_tol: self.rel_tol * factor, abs_tol: self.abs_tol * factor, ..*self }
    }

    /// Uniform grid over `[t0, t1]` with `output_points` samples.
    pub fn grid(&self, t0: f64, t1: f64) -> Vec<f64> {
        uniform_grid(t0, t1, self.output_points)
    }
}

pub fn uniform_grid(t0: f64, t1: f64, points: usize) -> Vec<f64> {
    let points = points.max(2);
    let last = (points - 1) as f64;
    (0..points)
        .map(|i| if i + 1 == points { t1 } else { t0 + (t1 - t0) * (i as f64) / last })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntegrationStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

/// What the integrator should do after a step has been accepted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepControl {
    Continue,
    /// The hook modified the state in place; the derivative is re-evaluated.
    Projected,
    /// End the integration early. The solution returned covers the steps taken so far.
    Stop,
}

#[derive(Debug, Clone)]
struct Segment {
    t0: f64,
    h: f64,
    coeffs: [DVector<f64>; 5],
}

impl Segment {
    fn eval(&self, t: f64) -> DVector<f64> {
        let theta = (t - self.t0) / self.h;
        let theta1 = 1.0 - theta;
        let [r1, r2, r3, r4, r5] = &self.coeffs;
        r1 + (r2 + (r3 + (r4 + r5 * theta1) * theta) * theta1) * theta
    }

    fn eval_derivative(&self, t: f64) -> DVector<f64> {
        let theta = (t - self.t0) / self.h;
        let theta1 = 1.0 - theta;
        let [_, r2, r3, r4, r5] = &self.coeffs;
        let a = r4 + r5 * theta1;
        let da = -r5;
        let b = r3 + &a * theta;
        let db = &a + da * theta;
        let c = r2 + &b * theta1;
        let dc = -&b + db * theta1;
        (c + dc * theta) / self.h
    }
}

/// Piecewise-polynomial solution of an ODE over the integration span.
#[derive(Debug, Clone)]
pub struct DenseSolution {
    /// Accepted step endpoints, in integration order (decreasing for backward spans).
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub stats: IntegrationStats,
    segments: Vec<Segment>,
}

impl DenseSolution {
    fn start(t0: f64, y0: DVector<f64>) -> Self {
        Self { times: vec![t0], states: vec![y0], stats: IntegrationStats::default(), segments: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.states[0].len()
    }

    pub fn t_start(&self) -> f64 {
        self.times[0]
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().expect("solution has at least one node")
    }

    pub fn final_state(&self) -> &DVector<f64> {
        self.states.last().expect("solution has at least one node")
    }

    fn segment_for(&self, t: f64) -> Option<&Segment> {
        if self.segments.is_empty() {
            return None;
        }
        let forward = self.t_end() >= self.t_start();
        let idx = if forward {
            self.times.partition_point(|&s| s <= t)
        } else {
            self.times.partition_point(|&s| s >= t)
        };
        Some(&self.segments[idx.saturating_sub(1).min(self.segments.len() - 1)])
    }

    /// State at time `t`. Times outside the span are extrapolated from the nearest segment.
    pub fn eval(&self, t: f64) -> DVector<f64> {
        match self.segment_for(t) {
            Some(seg) => seg.eval(t),
            None => self.states[0].clone(),
        }
    }

    /// Time derivative of the interpolant at `t`.
    pub fn eval_derivative(&self, t: f64) -> DVector<f64> {
        match self.segment_for(t) {
            Some(seg) => seg.eval_derivative(t),
            None => DVector::zeros(self.dim()),
        }
    }

    /// Samples on a uniform grid from `t_start` to `t_end`.
    pub fn sample(&self, points: usize) -> (Vec<f64>, Vec<DVector<f64>>) {
        let grid = uniform_grid(self.t_start(), self.t_end(), points);
        let states = grid.iter().map(|&t| self.eval(t)).collect();
        (grid, states)
    }

    /// Largest absolute component over the accepted nodes.
    pub fn max_abs(&self) -> f64 {
        self.states.iter().map(|s| s.amax()).fold(0.0, f64::max)
    }
}

// Dormand–Prince 5(4) tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

struct Stages {
    y_new: DVector<f64>,
    k_new: DVector<f64>,
    err: DVector<f64>,
    dense5: DVector<f64>,
}

fn dopri_step<F>(f: &F, t: f64, y: &DVector<f64>, k1: &DVector<f64>, h: f64) -> Stages
where
    F: Fn(f64, &DVector<f64>) -> DVector<f64>,
{
    let k2 = f(t + C2 * h, &(y + k1 * (h * A21)));
    let k3 = f(t + C3 * h, &(y + (k1 * A31 + &k2 * A32) * h));
    let k4 = f(t + C4 * h, &(y + (k1 * A41 + &k2 * A42 + &k3 * A43) * h));
    let k5 = f(t + C5 * h, &(y + (k1 * A51 + &k2 * A52 + &k3 * A53 + &k4 * A54) * h));
    let k6 = f(t + h, &(y + (k1 * A61 + &k2 * A62 + &k3 * A63 + &k4 * A64 + &k5 * A65) * h));
    let y_new = y + (k1 * A71 + &k3 * A73 + &k4 * A74 + &k5 * A75 + &k6 * A76) * h;
    let k7 = f(t + h, &y_new);
    let err = (k1 * E1 + &k3 * E3 + &k4 * E4 + &k5 * E5 + &k6 * E6 + &k7 * E7) * h;
    let dense5 = (k1 * D1 + &k3 * D3 + &k4 * D4 + &k5 * D5 + &k6 * D6 + &k7 * D7) * h;
    Stages { y_new, k_new: k7, err, dense5 }
}

fn scaled_norm(v: &DVector<f64>, y0: &DVector<f64>, y1: &DVector<f64>, cfg: &SolverConfig) -> f64 {
    let n = v.len().max(1) as f64;
    let sum: f64 = v
        .iter()
        .zip(y0.iter().zip(y1.iter()))
        .map(|(e, (a, b))| {
            let sc = cfg.abs_tol + cfg.rel_tol * a.abs().max(b.abs());
            (e / sc).powi(2)
        })
        .sum();
    (sum / n).sqrt()
}

fn initial_step<F>(f: &F, t0: f64, y0: &DVector<f64>, k1: &DVector<f64>, dir: f64, span: f64, cfg: &SolverConfig) -> f64
where
    F: Fn(f64, &DVector<f64>) -> DVector<f64>,
{
    let d0 = scaled_norm(y0, y0, y0, cfg);
    let d1 = scaled_norm(k1, y0, y0, cfg);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let h0 = h0.min(span);
    let y1 = y0 + k1 * (dir * h0);
    let k2 = f(t0 + dir * h0, &y1);
    let d2 = scaled_norm(&(k2 - k1), y0, y0, cfg) / h0;
    let h1 = if d1.max(d2) <= 1e-15 { (h0 * 1e-3).max(1e-6) } else { (0.01 / d1.max(d2)).powf(0.2) };
    (100.0 * h0).min(h1).min(span)
}

/// Integrates `dy/dt = f(t, y)` over `t_span`, which may run backward.
pub fn rk_integrate<F>(f: F, y0: &DVector<f64>, t_span: (f64, f64), cfg: &SolverConfig) -> Result<DenseSolution>
where
    F: Fn(f64, &DVector<f64>) -> DVector<f64>,
{
    rk_integrate_with(f, y0, t_span, cfg, |_, _| Ok(StepControl::Continue))
}

/// [`rk_integrate`] with a hook run after every accepted step.
///
/// The hook may project the state (returning [`StepControl::Projected`]),
/// stop the integration, or abort it with an error.
pub fn rk_integrate_with<F, P>(
    f: F,
    y0: &DVector<f64>,
    t_span: (f64, f64),
    cfg: &SolverConfig,
    mut after_step: P,
) -> Result<DenseSolution>
where
    F: Fn(f64, &DVector<f64>) -> DVector<f64>,
    P: FnMut(f64, &mut DVector<f64>) -> Result<StepControl>,
{
    let (t0, t1) = t_span;
    if !(t0.is_finite() && t1.is_finite()) {
        return Err(Error::InvalidInput(format!("integration span ({t0}, {t1}) is not finite")));
    }
    if y0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("initial state is not finite".into()));
    }
    let mut sol = DenseSolution::start(t0, y0.clone());
    let span = (t1 - t0).abs();
    if span == 0.0 {
        return Ok(sol);
    }
    let dir = (t1 - t0).signum();

    let mut t = t0;
    let mut y = y0.clone();
    let mut k1 = f(t, &y);
    sol.stats.evaluations += 1;
    let mut h = initial_step(&f, t0, &y, &k1, dir, span, cfg);
    sol.stats.evaluations += 1;

    let fail = |t: f64, reason: String, sol: DenseSolution| Error::Integration { t, reason, partial: Some(Box::new(sol)) };

    loop {
        if sol.stats.accepted + sol.stats.rejected >= cfg.max_steps {
            return Err(fail(t, format!("exceeded {} steps", cfg.max_steps), sol));
        }
        let remaining = (t1 - t).abs();
        let last = h >= remaining * (1.0 - 1e-12);
        if last {
            h = remaining;
        }
        if h < 1e-14 * t.abs().max(1.0) {
            return Err(fail(t, format!("step size underflow (h = {h:.3e})"), sol));
        }
        let hs = dir * h;
        let st = dopri_step(&f, t, &y, &k1, hs);
        sol.stats.evaluations += 6;
        let err = scaled_norm(&st.err, &y, &st.y_new, cfg);
        let finite = err.is_finite() && st.y_new.iter().all(|v| v.is_finite());

        if finite && err <= 1.0 {
            let t_new = if last { t1 } else { t + hs };
            let ydiff = &st.y_new - &y;
            let bspl = &k1 * hs - &ydiff;
            let r4 = &ydiff - &st.k_new * hs - &bspl;
            sol.segments.push(Segment { t0: t, h: hs, coeffs: [y.clone(), ydiff, bspl, r4, st.dense5] });
            sol.stats.accepted += 1;

            t = t_new;
            y = st.y_new;
            k1 = st.k_new;
            let control = after_step(t, &mut y)?;
            sol.times.push(t);
            sol.states.push(y.clone());
            match control {
                StepControl::Continue => {}
                StepControl::Projected => {
                    k1 = f(t, &y);
                    sol.stats.evaluations += 1;
                }
                StepControl::Stop => return Ok(sol),
            }
            if last {
                return Ok(sol);
            }
            let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            h *= factor;
        } else {
            sol.stats.rejected += 1;
            let factor = if finite { (0.9 * err.powf(-0.2)).clamp(0.1, 0.9) } else { 0.25 };
            h *= factor;
        }
    }
}

/// Fixed-step Dormand–Prince integration, used to measure convergence order.
pub fn integrate_fixed_steps<F>(f: F, y0: &DVector<f64>, t_span: (f64, f64), steps: usize) -> DVector<f64>
where
    F: Fn(f64, &DVector<f64>) -> DVector<f64>,
{
    let h = (t_span.1 - t_span.0) / steps as f64;
    let mut t = t_span.0;
    let mut y = y0.clone();
    for _ in 0..steps {
        let k1 = f(t, &y);
        y = dopri_step(&f, t, &y, &k1, h).y_new;
        t += h;
    }
    y
}

/// Central-difference Jacobian of `f` at `x` with absolute step `h`.
pub fn fd_jacobian<F>(f: F, x: &DVector<f64>, h: f64) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let n = x.len();
    let mut columns = Vec::with_capacity(n);
    let mut xp = x.clone();
    for j in 0..n {
        xp[j] = x[j] + h;
        let fp = f(&xp);
        xp[j] = x[j] - h;
        let fm = f(&xp);
        xp[j] = x[j];
        columns.push((fp - fm) / (2.0 * h));
    }
    let rows = columns.first().map_or(0, |c| c.len());
    DMatrix::from_fn(rows, n, |i, j| columns[j][i])
}

/// Outcome of a single-shooting solve.
#[derive(Debug, Clone)]
pub struct ShootingResult {
    pub unknowns_at_0: DVector<f64>,
    /// Euclidean norm of the terminal boundary residual.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Dense solution over the horizon for the returned unknowns.
    pub solution: DenseSolution,
}

/// Default escape factor for [`shoot_guarded`].
pub const SHOOTING_ESCAPE_BOUND: f64 = 1e6;

/// Largest-to-smallest singular value ratio above which the Newton step is refused.
pub const MAX_SENSITIVITY_CONDITION: f64 = 1e12;

/// Single shooting with damped Newton iteration.
///
/// `initial_state` assembles the full initial state from the unknowns (the
/// known initial values are captured by the closure); `boundary` maps the
/// terminal state to a residual with as many entries as there are unknowns.
/// Sensitivities are forward differences with relative step `cfg.fd_step`,
/// and a step that increases the residual is halved up to eight times.
pub fn shoot<F, I, B>(
    dynamics: F,
    initial_state: I,
    unknown_guess: &DVector<f64>,
    boundary: B,
    t_final: f64,
    cfg: &SolverConfig,
) -> Result<ShootingResult>
where
    F: Fn(f64, &DVector<f64>) -> DVector<f64>,
    I: Fn(&DVector<f64>) -> DVector<f64>,
    B: Fn(&DVector<f64>) -> DVector<f64>,
{
    shoot_guarded(dynamics, initial_state, unknown_guess, boundary, t_final, cfg, None)
}

/// [`shoot`], abandoning any trial trajectory that grows past `escape` times
/// the size of its initial state. Worth enabling only when the caller has a
/// fallback, since large but finite trajectories are rejected too.
pub fn shoot_guarded<F, I, B>(
    dynamics: F,
    initial_state: I,
    unknown_guess: &DVector<f64>,
    boundary: B,
    t_final: f64,
    cfg: &SolverConfig,
    escape: Option<f64>,
) -> Result<ShootingResult>
where
    F: Fn(f64, &DVector<f64>) -> DVector<f64>,
    I: Fn(&DVector<f64>) -> DVector<f64>,
    B: Fn(&DVector<f64>) -> DVector<f64>,
{
    cfg.validate()?;
    let run = |z: &DVector<f64>| -> Result<(DVector<f64>, DenseSolution)> {
        let y0 = initial_state(z);
        let limit = escape.map_or(f64::INFINITY, |e| e * y0.amax().max(1.0));
        let sol = rk_integrate_with(&dynamics, &y0, (0.0, t_final), cfg, |t, y| {
            if y.amax() > limit {
                return Err(Error::Integration { t, reason: "trajectory escaped during shooting".into(), partial: None });
            }
            Ok(StepControl::Continue)
        })?;
        let res = boundary(sol.final_state());
        if res.len() != z.len() {
            return Err(Error::InvalidInput(format!(
                "boundary residual has {} entries but there are {} unknowns",
                res.len(),
                z.len()
            )));
        }
        if res.iter().any(|v| !v.is_finite()) {
            return Err(Error::Integration { t: t_final, reason: "non-finite boundary residual".into(), partial: None });
        }
        Ok((res, sol))
    };

    let mut z = unknown_guess.clone();
    let (mut res, mut sol) = run(&z)?;
    let mut norm = res.norm();
    let mut iterations = 0;

    while norm > cfg.shooting_tol && iterations < cfg.shooting_max_iters {
        iterations += 1;
        let m = z.len();
        let mut jac = DMatrix::zeros(m, m);
        for j in 0..m {
            let h = cfg.fd_step * z[j].abs().max(1.0);
            let mut zp = z.clone();
            zp[j] += h;
            let column = match run(&zp) {
                Ok((rp, _)) => (rp - &res) / h,
                Err(_) => {
                    zp[j] = z[j] - h;
                    let (rm, _) = run(&zp)?;
                    (&res - rm) / h
                }
            };
            jac.set_column(j, &column);
        }

        let sv = jac.clone().singular_values();
        let smax = sv.max();
        let smin = sv.min();
        let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
        if !(condition <= MAX_SENSITIVITY_CONDITION) {
            return Err(Error::IllConditioned { condition });
        }
        let delta = match jac.lu().solve(&(-&res)) {
            Some(d) => d,
            None => return Err(Error::IllConditioned { condition: f64::INFINITY }),
        };

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..=8 {
            let trial = &z + &delta * step;
            if let Ok((r_try, s_try)) = run(&trial) {
                if r_try.norm() < norm {
                    accepted = Some((trial, r_try, s_try));
                    break;
                }
            }
            step *= 0.5;
        }
        match accepted {
            Some((z_new, r_new, s_new)) => {
                z = z_new;
                res = r_new;
                sol = s_new;
                norm = res.norm();
            }
            None => break,
        }
    }

    Ok(ShootingResult { unknowns_at_0: z, residual: norm, iterations, converged: norm <= cfg.shooting_tol, solution: sol })
}

/// Boundedness verdict of a backward matrix sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum SweepVerdict {
    Bounded,
    /// The solution escaped the bound (or the integrator failed) at `blowup_time`.
    Unbounded { blowup_time: f64 },
}

pub const DEFAULT_SWEEP_BOUND: f64 = 1e6;

#[derive(Debug, Clone)]
pub struct SweepResult {
    /// Column-major flattened matrix trajectory.
    pub solution: DenseSolution,
    pub rows: usize,
    pub max_abs: f64,
    pub verdict: SweepVerdict,
}

impl SweepResult {
    pub fn matrix_at(&self, t: f64) -> DMatrix<f64> {
        let v = self.solution.eval(t);
        DMatrix::from_column_slice(self.rows, self.rows, v.as_slice())
    }
}

/// Integrates `dS/dt = field(t, S)` from `t_span.0` (terminal time) back to
/// `t_span.1`, declaring the solution unbounded if any entry exceeds `bound`.
pub fn backward_sweep<F>(
    field: F,
    s_terminal: &DMatrix<f64>,
    t_span: (f64, f64),
    cfg: &SolverConfig,
    bound: f64,
) -> Result<SweepResult>
where
    F: Fn(f64, &DMatrix<f64>) -> DMatrix<f64>,
{
    let rows = s_terminal.nrows();
    if rows != s_terminal.ncols() {
        return Err(Error::InvalidInput(format!(
            "terminal matrix must be square, got {}x{}",
            rows,
            s_terminal.ncols()
        )));
    }
    let flat = |t: f64, v: &DVector<f64>| {
        let s = DMatrix::from_column_slice(rows, rows, v.as_slice());
        let ds = field(t, &s);
        DVector::from_column_slice(ds.as_slice())
    };
    let y0 = DVector::from_column_slice(s_terminal.as_slice());
    let mut escaped = false;
    let outcome = rk_integrate_with(flat, &y0, t_span, cfg, |_, y| {
        if y.amax() > bound {
            escaped = true;
            Ok(StepControl::Stop)
        } else {
            Ok(StepControl::Continue)
        }
    });
    let solution = match outcome {
        Ok(sol) => sol,
        Err(Error::Integration { t, partial: Some(partial), .. }) => {
            let max_abs = partial.max_abs();
            return Ok(SweepResult {
                solution: *partial,
                rows,
                max_abs,
                verdict: SweepVerdict::Unbounded { blowup_time: t },
            });
        }
        Err(e) => return Err(e),
    };
    let max_abs = solution.max_abs();
    let verdict = if escaped {
        SweepVerdict::Unbounded { blowup_time: solution.t_end() }
    } else {
        SweepVerdict::Bounded
    };
    Ok(SweepResult { solution, rows, max_abs, verdict })
}
