//! Single-control optimal control problems
//!
//! ```text
//! min  Psi(x(tf)) + int_0^tf F0(x) + gamma G0(x) + (r/2) gamma^2 dt
//! s.t. x' = F(x) + gamma G(x),  x(0) = x0
//! ```
//!
//! solved through their Euler–Lagrange conditions. The optimal control is
//! `gamma = -(lambda^T G + G0) / r`. When the Lie bracket `[F, G]` vanishes
//! the co-state can be eliminated and the control obeys
//! `gamma' = (grad F0 . G - grad G0 . F) / r`, which [`solve_reduced`]
//! integrates directly. [`riccati_certificate`] checks second-order
//! sufficiency by sweeping the matrix Riccati equation backward.

use crate::error::{Error, Result};
use crate::ode::{
    backward_sweep, fd_jacobian, rk_integrate, shoot_guarded, DenseSolution, SolverConfig, SweepVerdict,
    DEFAULT_SWEEP_BOUND, SHOOTING_ESCAPE_BOUND,
};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// The vector fields and costs of a control problem.
///
/// Gradients of the scalar costs are required; Jacobians and Hessians are
/// optional and fall back to finite differences.
pub trait ControlSystem {
    fn dim(&self) -> usize;
    /// Uncontrolled drift `F`.
    fn drift(&self, x: &DVector<f64>) -> DVector<f64>;
    /// Control direction `G`.
    fn actuation(&self, x: &DVector<f64>) -> DVector<f64>;
    /// Running cost `F0`.
    fn running_cost(&self, x: &DVector<f64>) -> f64;
    fn running_cost_gradient(&self, x: &DVector<f64>) -> DVector<f64>;

    /// Control-weighted running cost `G0`.
    fn control_cost(&self, _x: &DVector<f64>) -> f64 {
        0.0
    }
    fn control_cost_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(x.len())
    }
    /// Terminal cost `Psi`.
    fn terminal_cost(&self, _x: &DVector<f64>) -> f64 {
        0.0
    }
    fn terminal_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(x.len())
    }
    fn terminal_hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(x.len(), x.len())
    }
    fn drift_jacobian(&self, _x: &DVector<f64>) -> Option<DMatrix<f64>> {
        None
    }
    fn actuation_jacobian(&self, _x: &DVector<f64>) -> Option<DMatrix<f64>> {
        None
    }
    /// Hessian in `x` of the Hamiltonian, when known in closed form.
    fn hamiltonian_state_hessian(
        &self,
        _x: &DVector<f64>,
        _gamma: f64,
        _lambda: &DVector<f64>,
    ) -> Option<DMatrix<f64>> {
        None
    }
}

/// Absolute tolerance for the gradient consistency check run on construction.
pub const GRADIENT_CHECK_TOL: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct ControlProblem<S> {
    pub system: S,
    /// Control weight.
    pub r: f64,
    /// Horizon.
    pub t_f: f64,
    pub x0: DVector<f64>,
}

fn fd_gradient(f: impl Fn(&DVector<f64>) -> f64, x: &DVector<f64>, h: f64) -> DVector<f64> {
    let mut xp = x.clone();
    DVector::from_fn(x.len(), |j, _| {
        xp[j] = x[j] + h;
        let fp = f(&xp);
        xp[j] = x[j] - h;
        let fm = f(&xp);
        xp[j] = x[j];
        (fp - fm) / (2.0 * h)
    })
}

impl<S: ControlSystem> ControlProblem<S> {
    /// Validates the weights and checks supplied derivatives against finite differences at `x0`.
    pub fn new(system: S, r: f64, t_f: f64, x0: DVector<f64>) -> Result<Self> {
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::InvalidInput(format!("control weight r must be positive, got {r}")));
        }
        if !(t_f > 0.0 && t_f.is_finite()) {
            return Err(Error::InvalidInput(format!("horizon t_f must be positive, got {t_f}")));
        }
        if x0.len() != system.dim() {
            return Err(Error::InvalidInput(format!(
                "initial state has {} components, system has {}",
                x0.len(),
                system.dim()
            )));
        }
        let h = 1e-6;
        let checks = [
            ("running cost", system.running_cost_gradient(&x0), fd_gradient(|x| system.running_cost(x), &x0, h)),
            ("control cost", system.control_cost_gradient(&x0), fd_gradient(|x| system.control_cost(x), &x0, h)),
            ("terminal cost", system.terminal_gradient(&x0), fd_gradient(|x| system.terminal_cost(x), &x0, h)),
        ];
        for (name, supplied, numeric) in checks {
            let err = (supplied - numeric).amax();
            if !(err < GRADIENT_CHECK_TOL) {
                return Err(Error::InvalidInput(format!("{name} gradient disagrees with finite differences by {err:.3e}")));
            }
        }
        let jacobians = [
            ("drift", system.drift_jacobian(&x0), fd_jacobian(|x| system.drift(x), &x0, h)),
            ("actuation", system.actuation_jacobian(&x0), fd_jacobian(|x| system.actuation(x), &x0, h)),
        ];
        for (name, supplied, numeric) in jacobians {
            if let Some(jac) = supplied {
                let err = (jac - numeric).amax();
                if !(err < GRADIENT_CHECK_TOL) {
                    return Err(Error::InvalidInput(format!("{name} Jacobian disagrees with finite differences by {err:.3e}")));
                }
            }
        }
        Ok(Self { system, r, t_f, x0 })
    }

    pub fn dim(&self) -> usize {
        self.system.dim()
    }

    fn fd_step(&self, x: &DVector<f64>, cfg_step: f64) -> f64 {
        cfg_step * x.amax().max(1.0)
    }

    /// `D_x F`, analytic when the system provides it.
    pub fn drift_jacobian(&self, x: &DVector<f64>, fd_step: f64) -> DMatrix<f64> {
        self.system
            .drift_jacobian(x)
            .unwrap_or_else(|| fd_jacobian(|y| self.system.drift(y), x, self.fd_step(x, fd_step)))
    }

    /// `D_x G`, analytic when the system provides it.
    pub fn actuation_jacobian(&self, x: &DVector<f64>, fd_step: f64) -> DMatrix<f64> {
        self.system
            .actuation_jacobian(x)
            .unwrap_or_else(|| fd_jacobian(|y| self.system.actuation(y), x, self.fd_step(x, fd_step)))
    }

    /// Running cost of the integrand at one instant.
    pub fn running_integrand(&self, x: &DVector<f64>, gamma: f64) -> f64 {
        self.system.running_cost(x) + gamma * self.system.control_cost(x) + 0.5 * self.r * gamma * gamma
    }

    /// Terminal control value forced by transversality: `-(grad Psi . G + G0) / r` at `x`.
    pub fn terminal_gamma(&self, x: &DVector<f64>) -> f64 {
        -(self.system.terminal_gradient(x).dot(&self.system.actuation(x)) + self.system.control_cost(x)) / self.r
    }

    /// Right-hand side of the co-state equation.
    pub fn costate_rhs(&self, x: &DVector<f64>, gamma: f64, lambda: &DVector<f64>, fd_step: f64) -> DVector<f64> {
        let df = self.drift_jacobian(x, fd_step);
        let dg = self.actuation_jacobian(x, fd_step);
        -(self.system.running_cost_gradient(x)
            + self.system.control_cost_gradient(x) * gamma
            + df.tr_mul(lambda)
            + dg.tr_mul(lambda) * gamma)
    }

    /// `gamma' = (grad F0 . G - grad G0 . F) / r`, valid when the bracket vanishes.
    pub fn reduced_gamma_rate(&self, x: &DVector<f64>) -> f64 {
        let s = &self.system;
        (s.running_cost_gradient(x).dot(&s.actuation(x)) - s.control_cost_gradient(x).dot(&s.drift(x))) / self.r
    }
}

/// `F0 + gamma G0 + (r/2) gamma^2 + lambda^T F + gamma lambda^T G`.
pub fn hamiltonian<S: ControlSystem>(p: &ControlProblem<S>, x: &DVector<f64>, gamma: f64, lambda: &DVector<f64>) -> f64 {
    let s = &p.system;
    p.running_integrand(x, gamma) + lambda.dot(&s.drift(x)) + gamma * lambda.dot(&s.actuation(x))
}

/// Minimizer of the Hamiltonian over the control: `-(lambda^T G + G0) / r`.
pub fn optimal_gamma<S: ControlSystem>(p: &ControlProblem<S>, x: &DVector<f64>, lambda: &DVector<f64>) -> f64 {
    -(lambda.dot(&p.system.actuation(x)) + p.system.control_cost(x)) / p.r
}

/// `[F, G] = (D_x F) G - (D_x G) F`.
pub fn lie_bracket<S: ControlSystem>(p: &ControlProblem<S>, x: &DVector<f64>, fd_step: f64) -> DVector<f64> {
    let s = &p.system;
    p.drift_jacobian(x, fd_step) * s.actuation(x) - p.actuation_jacobian(x, fd_step) * s.drift(x)
}

/// Options for the shooting stage of [`solve_el_with`] and [`solve_reduced_with`].
#[derive(Debug, Clone, Default)]
pub struct ShootingStrategy {
    /// Initial guess for the unknown initial values (co-state, or the scalar control).
    pub guess: Option<DVector<f64>>,
    /// Continuation in the initial state, used when the direct solve fails.
    pub homotopy: Option<Homotopy>,
}

/// Continuation path `x0(s) = center + s (x0 - center)` for `s = 1/stages, ..., 1`.
#[derive(Debug, Clone)]
pub struct Homotopy {
    pub center: DVector<f64>,
    pub stages: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    EulerLagrange,
    Reduced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    pub method: SolveMethod,
    pub converged: bool,
    pub residual: f64,
    pub iterations: usize,
    /// Continuation stages used (0 when the direct solve succeeded).
    pub homotopy_stages: usize,
    /// `|gamma(tf) + (grad Psi . G + G0)(x(tf)) / r|`.
    pub terminal_gamma_error: f64,
    /// Max over the grid of `|r gamma + G0 + lambda^T G|`, when a co-state is available.
    pub stationarity_error: Option<f64>,
}

#[derive(Debug, Clone)]
enum Paths {
    /// Dense `[x; lambda]`.
    Full(DenseSolution),
    /// Dense `[x; gamma]` and optionally the reconstructed co-state.
    Reduced { state: DenseSolution, costate: Option<DenseSolution> },
}

/// Sampled state, co-state and control at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct PointValue {
    pub x: DVector<f64>,
    pub lambda: Option<DVector<f64>>,
    pub gamma: f64,
}

#[derive(Debug, Clone)]
pub struct ControlSolution {
    pub times: Vec<f64>,
    pub x: Vec<DVector<f64>>,
    pub lambda: Option<Vec<DVector<f64>>>,
    pub gamma: Vec<f64>,
    pub objective_value: f64,
    pub diagnostics: SolveDiagnostics,
    paths: Paths,
}

impl ControlSolution {
    pub fn t_final(&self) -> f64 {
        *self.times.last().expect("nonempty grid")
    }

    pub fn gamma_at_zero(&self) -> f64 {
        self.gamma[0]
    }

    pub fn has_costate(&self) -> bool {
        self.lambda.is_some()
    }

    /// Interpolated values at an arbitrary time in `[0, tf]`.
    pub fn eval<S: ControlSystem>(&self, p: &ControlProblem<S>, t: f64) -> PointValue {
        let n = p.dim();
        match &self.paths {
            Paths::Full(dense) => {
                let y = dense.eval(t);
                let x = y.rows(0, n).into_owned();
                let lambda = y.rows(n, n).into_owned();
                let gamma = optimal_gamma(p, &x, &lambda);
                PointValue { x, lambda: Some(lambda), gamma }
            }
            Paths::Reduced { state, costate } => {
                let y = state.eval(t);
                PointValue {
                    x: y.rows(0, n).into_owned(),
                    gamma: y[n],
                    lambda: costate.as_ref().map(|c| c.eval(t)),
                }
            }
        }
    }

    /// Sup-norm distance between two sampled control trajectories on this solution's grid.
    pub fn gamma_gap<S: ControlSystem>(&self, p: &ControlProblem<S>, other: &ControlSolution) -> f64 {
        self.times
            .iter()
            .zip(&self.gamma)
            .map(|(&t, &g)| (other.eval(p, t).gamma - g).abs())
            .fold(0.0, f64::max)
    }
}

/// Composite trapezoid rule.
pub fn trapezoid(times: &[f64], values: &[f64]) -> f64 {
    times.windows(2).zip(values.windows(2)).map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0] + v[1])).sum()
}

fn objective<S: ControlSystem>(p: &ControlProblem<S>, times: &[f64], x: &[DVector<f64>], gamma: &[f64]) -> f64 {
    let integrand: Vec<f64> = x.iter().zip(gamma).map(|(x, &g)| p.running_integrand(x, g)).collect();
    trapezoid(times, &integrand) + p.system.terminal_cost(x.last().expect("nonempty grid"))
}

fn el_shoot<S: ControlSystem>(
    p: &ControlProblem<S>,
    x0: &DVector<f64>,
    guess: &DVector<f64>,
    cfg: &SolverConfig,
    escape: Option<f64>,
) -> Result<crate::ode::ShootingResult> {
    let n = p.dim();
    let dynamics = |_t: f64, y: &DVector<f64>| {
        let x = y.rows(0, n).into_owned();
        let lambda = y.rows(n, n).into_owned();
        let gamma = optimal_gamma(p, &x, &lambda);
        let dx = p.system.drift(&x) + p.system.actuation(&x) * gamma;
        let dl = p.costate_rhs(&x, gamma, &lambda, cfg.fd_step);
        let mut out = DVector::zeros(2 * n);
        out.rows_mut(0, n).copy_from(&dx);
        out.rows_mut(n, n).copy_from(&dl);
        out
    };
    let initial = |z: &DVector<f64>| {
        let mut y = DVector::zeros(2 * n);
        y.rows_mut(0, n).copy_from(x0);
        y.rows_mut(n, n).copy_from(z);
        y
    };
    let boundary = |y: &DVector<f64>| {
        let x = y.rows(0, n).into_owned();
        y.rows(n, n).into_owned() - p.system.terminal_gradient(&x)
    };
    shoot_guarded(dynamics, initial, guess, boundary, p.t_f, cfg, escape)
}

fn reduced_shoot<S: ControlSystem>(
    p: &ControlProblem<S>,
    x0: &DVector<f64>,
    guess: &DVector<f64>,
    cfg: &SolverConfig,
    escape: Option<f64>,
) -> Result<crate::ode::ShootingResult> {
    let n = p.dim();
    let dynamics = |_t: f64, y: &DVector<f64>| {
        let x = y.rows(0, n).into_owned();
        let gamma = y[n];
        let dx = p.system.drift(&x) + p.system.actuation(&x) * gamma;
        let mut out = DVector::zeros(n + 1);
        out.rows_mut(0, n).copy_from(&dx);
        out[n] = p.reduced_gamma_rate(&x);
        out
    };
    let initial = |z: &DVector<f64>| {
        let mut y = DVector::zeros(n + 1);
        y.rows_mut(0, n).copy_from(x0);
        y[n] = z[0];
        y
    };
    let boundary = |y: &DVector<f64>| {
        let x = y.rows(0, n).into_owned();
        DVector::from_element(1, y[n] - p.terminal_gamma(&x))
    };
    shoot_guarded(dynamics, initial, guess, boundary, p.t_f, cfg, escape)
}

type ShootFn<S> =
    fn(&ControlProblem<S>, &DVector<f64>, &DVector<f64>, &SolverConfig, Option<f64>) -> Result<crate::ode::ShootingResult>;

/// Direct solve, then continuation in the initial state if that fails.
fn solve_with_continuation<S: ControlSystem>(
    p: &ControlProblem<S>,
    guess: DVector<f64>,
    strategy: &ShootingStrategy,
    cfg: &SolverConfig,
    run: ShootFn<S>,
) -> Result<(crate::ode::ShootingResult, usize)> {
    let escape = strategy.homotopy.as_ref().map(|_| SHOOTING_ESCAPE_BOUND);
    let direct = run(p, &p.x0, &guess, cfg, escape);
    let homotopy = match (&direct, &strategy.homotopy) {
        (Ok(res), _) if res.converged => return Ok((direct.unwrap(), 0)),
        (_, None) => return direct.map(|r| (r, 0)),
        (_, Some(h)) => h,
    };
    if homotopy.center.len() != p.dim() || homotopy.stages == 0 {
        return Err(Error::InvalidInput("homotopy center must match the state dimension and use at least one stage".into()));
    }
    let mut z = guess;
    let mut last = None;
    for stage in 1..=homotopy.stages {
        let s = stage as f64 / homotopy.stages as f64;
        let x0 = &homotopy.center + (&p.x0 - &homotopy.center) * s;
        let res = run(p, &x0, &z, cfg, None)?;
        z = res.unknowns_at_0.clone();
        last = Some(res);
    }
    Ok((last.expect("at least one stage"), homotopy.stages))
}

fn assemble_full<S: ControlSystem>(
    p: &ControlProblem<S>,
    shot: crate::ode::ShootingResult,
    homotopy_stages: usize,
    cfg: &SolverConfig,
) -> ControlSolution {
    let n = p.dim();
    let dense = shot.solution;
    let times = cfg.grid(0.0, p.t_f);
    let mut xs = Vec::with_capacity(times.len());
    let mut lambdas = Vec::with_capacity(times.len());
    let mut gammas = Vec::with_capacity(times.len());
    for &t in &times {
        let y = dense.eval(t);
        let x = y.rows(0, n).into_owned();
        let lambda = y.rows(n, n).into_owned();
        gammas.push(optimal_gamma(p, &x, &lambda));
        xs.push(x);
        lambdas.push(lambda);
    }
    let terminal_gamma_error = (gammas.last().unwrap() - p.terminal_gamma(xs.last().unwrap())).abs();
    let stationarity = stationarity_error(p, &xs, &lambdas, &gammas);
    ControlSolution {
        objective_value: objective(p, &times, &xs, &gammas),
        diagnostics: SolveDiagnostics {
            method: SolveMethod::EulerLagrange,
            converged: shot.converged,
            residual: shot.residual,
            iterations: shot.iterations,
            homotopy_stages,
            terminal_gamma_error,
            stationarity_error: Some(stationarity),
        },
        times,
        x: xs,
        lambda: Some(lambdas),
        gamma: gammas,
        paths: Paths::Full(dense),
    }
}

fn stationarity_error<S: ControlSystem>(
    p: &ControlProblem<S>,
    xs: &[DVector<f64>],
    lambdas: &[DVector<f64>],
    gammas: &[f64],
) -> f64 {
    xs.iter()
        .zip(lambdas)
        .zip(gammas)
        .map(|((x, l), &g)| (p.r * g + p.system.control_cost(x) + l.dot(&p.system.actuation(x))).abs())
        .fold(0.0, f64::max)
}

/// First-order estimate of `lambda(0)`: the terminal gradient plus the running-cost gradient accrued over the horizon.
pub fn costate_guess<S: ControlSystem>(p: &ControlProblem<S>) -> DVector<f64> {
    p.system.terminal_gradient(&p.x0) + p.system.running_cost_gradient(&p.x0) * p.t_f
}

/// Solves the full Euler–Lagrange boundary value problem by shooting on `lambda(0)`.
///
/// A non-converged solve is returned with `diagnostics.converged == false`.
pub fn solve_el<S: ControlSystem>(p: &ControlProblem<S>, cfg: &SolverConfig) -> Result<ControlSolution> {
    solve_el_with(p, cfg, &ShootingStrategy::default())
}

pub fn solve_el_with<S: ControlSystem>(
    p: &ControlProblem<S>,
    cfg: &SolverConfig,
    strategy: &ShootingStrategy,
) -> Result<ControlSolution> {
    let guess = strategy.guess.clone().unwrap_or_else(|| costate_guess(p));
    if guess.len() != p.dim() {
        return Err(Error::InvalidInput(format!("co-state guess has {} entries, expected {}", guess.len(), p.dim())));
    }
    let (shot, stages) = solve_with_continuation(p, guess, strategy, cfg, el_shoot::<S>)?;
    Ok(assemble_full(p, shot, stages, cfg))
}

/// Bracket norm above which the co-state cannot be eliminated.
pub const BRACKET_TOL: f64 = 1e-8;
/// Points sampled along the solution when checking the bracket.
pub const BRACKET_SAMPLES: usize = 20;

fn check_bracket<S: ControlSystem>(p: &ControlProblem<S>, t: f64, x: &DVector<f64>, fd_step: f64) -> Result<()> {
    let norm = lie_bracket(p, x, fd_step).norm();
    if norm < BRACKET_TOL {
        Ok(())
    } else {
        Err(Error::BracketNonvanishing { norm, t })
    }
}

/// Initial control guess: the terminal value extrapolated back along the slope at `x0`.
pub fn reduced_gamma_guess<S: ControlSystem>(p: &ControlProblem<S>) -> f64 {
    p.terminal_gamma(&p.x0) - p.reduced_gamma_rate(&p.x0) * p.t_f
}

/// Solves the co-state-free system by shooting on `gamma(0)`.
///
/// Requires `[F, G] = 0`; the bracket is checked at `x0` and at 20 points of
/// the solution. The returned solution carries no co-state (see
/// [`reconstruct_costate`]).
pub fn solve_reduced<S: ControlSystem>(p: &ControlProblem<S>, cfg: &SolverConfig) -> Result<ControlSolution> {
    solve_reduced_with(p, cfg, &ShootingStrategy::default())
}

pub fn solve_reduced_with<S: ControlSystem>(
    p: &ControlProblem<S>,
    cfg: &SolverConfig,
    strategy: &ShootingStrategy,
) -> Result<ControlSolution> {
    let n = p.dim();
    check_bracket(p, 0.0, &p.x0, cfg.fd_step)?;
    let guess = strategy.guess.clone().unwrap_or_else(|| DVector::from_element(1, reduced_gamma_guess(p)));
    if guess.len() != 1 {
        return Err(Error::InvalidInput("the reduced system has a single unknown".into()));
    }
    let (shot, stages) = solve_with_continuation(p, guess, strategy, cfg, reduced_shoot::<S>)?;
    let dense = shot.solution;
    for t in crate::ode::uniform_grid(0.0, p.t_f, BRACKET_SAMPLES) {
        check_bracket(p, t, &dense.eval(t).rows(0, n).into_owned(), cfg.fd_step)?;
    }
    let times = cfg.grid(0.0, p.t_f);
    let (xs, gammas): (Vec<_>, Vec<_>) = times
        .iter()
        .map(|&t| {
            let y = dense.eval(t);
            (y.rows(0, n).into_owned(), y[n])
        })
        .unzip();
    let terminal_gamma_error = (gammas.last().unwrap() - p.terminal_gamma(xs.last().unwrap())).abs();
    Ok(ControlSolution {
        objective_value: objective(p, &times, &xs, &gammas),
        diagnostics: SolveDiagnostics {
            method: SolveMethod::Reduced,
            converged: shot.converged,
            residual: shot.residual,
            iterations: shot.iterations,
            homotopy_stages: stages,
            terminal_gamma_error,
            stationarity_error: None,
        },
        times,
        x: xs,
        lambda: None,
        gamma: gammas,
        paths: Paths::Reduced { state: dense, costate: None },
    })
}

/// Rebuilds the co-state of a reduced solution by integrating the co-state
/// equation backward from `lambda(tf) = grad Psi(x(tf))`, then records the
/// a posteriori stationarity error `|r gamma + G0 + lambda^T G|`.
pub fn reconstruct_costate<S: ControlSystem>(
    p: &ControlProblem<S>,
    sol: &mut ControlSolution,
    cfg: &SolverConfig,
) -> Result<()> {
    let n = p.dim();
    let state = match &sol.paths {
        Paths::Full(_) => return Ok(()),
        Paths::Reduced { state, .. } => state.clone(),
    };
    let rhs = |t: f64, lambda: &DVector<f64>| {
        let y = state.eval(t);
        let x = y.rows(0, n).into_owned();
        p.costate_rhs(&x, y[n], lambda, cfg.fd_step)
    };
    let x_tf = state.eval(p.t_f).rows(0, n).into_owned();
    let costate = rk_integrate(rhs, &p.system.terminal_gradient(&x_tf), (p.t_f, 0.0), cfg)?;
    let lambdas: Vec<DVector<f64>> = sol.times.iter().map(|&t| costate.eval(t)).collect();
    sol.diagnostics.stationarity_error = Some(stationarity_error(p, &sol.x, &lambdas, &sol.gamma));
    sol.lambda = Some(lambdas);
    sol.paths = Paths::Reduced { state, costate: Some(costate) };
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertificateMethod {
    Cholesky,
    Riccati,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    /// The convexity margin stayed positive.
    Sufficient,
    /// The convexity test failed; optimality is not decided by it.
    Inconclusive,
    /// The Riccati solution stayed bounded on the horizon.
    Bounded,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub method: CertificateMethod,
    pub times: Vec<f64>,
    /// Convexity margin (Cholesky) or largest absolute Riccati entry at each time.
    pub margin_trace: Vec<f64>,
    pub verdict: Verdict,
    /// Minimum margin (Cholesky) or maximum absolute entry over the sweep (Riccati).
    pub extremum: f64,
    /// Time at which a Riccati sweep escaped its bound.
    pub blowup_time: Option<f64>,
}

/// `D_xx H`, analytic when available, else differenced from the Hamiltonian's state gradient.
fn hamiltonian_state_hessian<S: ControlSystem>(
    p: &ControlProblem<S>,
    x: &DVector<f64>,
    gamma: f64,
    lambda: &DVector<f64>,
    fd_step: f64,
) -> DMatrix<f64> {
    if let Some(h) = p.system.hamiltonian_state_hessian(x, gamma, lambda) {
        return h;
    }
    let grad = |y: &DVector<f64>| -p.costate_rhs(y, gamma, lambda, fd_step);
    let step = 1e-5 * x.amax().max(1.0);
    let h = fd_jacobian(grad, x, step);
    (&h + h.transpose()) * 0.5
}

/// Sweeps the matrix Riccati equation
///
/// ```text
/// -S' = H_xx + f_x^T S + S f_x - (1/r) (H_gx + f_g^T S)^T (H_gx + f_g^T S),   S(tf) = Psi_xx
/// ```
///
/// backward along `sol` and reports whether it stays below `bound`.
/// Reduced solutions must have their co-state reconstructed first.
pub fn riccati_certificate<S: ControlSystem>(
    p: &ControlProblem<S>,
    sol: &ControlSolution,
    cfg: &SolverConfig,
    bound: f64,
) -> Result<CertificateReport> {
    if !sol.has_costate() {
        return Err(Error::Precondition("the Riccati sweep needs a co-state; reconstruct it first".into()));
    }
    let field = |t: f64, s: &DMatrix<f64>| {
        let pv = sol.eval(p, t);
        let lambda = pv.lambda.expect("co-state present");
        let (x, gamma) = (pv.x, pv.gamma);
        let fx = p.drift_jacobian(&x, cfg.fd_step) + p.actuation_jacobian(&x, cfg.fd_step) * gamma;
        let hxx = hamiltonian_state_hessian(p, &x, gamma, &lambda, cfg.fd_step);
        let h_gx = p.system.control_cost_gradient(&x) + p.actuation_jacobian(&x, cfg.fd_step).tr_mul(&lambda);
        let coupling = h_gx + s.tr_mul(&p.system.actuation(&x));
        -(hxx + fx.tr_mul(s) + s * &fx - &coupling * coupling.transpose() / p.r)
    };
    let x_tf = sol.x.last().expect("nonempty grid");
    let sweep = backward_sweep(field, &p.system.terminal_hessian(x_tf), (p.t_f, 0.0), cfg, bound)?;
    let (verdict, blowup_time, t_lo) = match sweep.verdict {
        SweepVerdict::Bounded => (Verdict::Bounded, None, 0.0),
        SweepVerdict::Unbounded { blowup_time } => (Verdict::Unbounded, Some(blowup_time), blowup_time),
    };
    let times: Vec<f64> = sol.times.iter().copied().filter(|&t| t >= t_lo).collect();
    let margin_trace = times.iter().map(|&t| sweep.solution.eval(t).amax()).collect();
    Ok(CertificateReport {
        method: CertificateMethod::Riccati,
        times,
        margin_trace,
        verdict,
        extremum: sweep.max_abs,
        blowup_time,
    })
}

/// [`riccati_certificate`] with the default escape bound of `1e6`.
pub fn riccati_certificate_default<S: ControlSystem>(
    p: &ControlProblem<S>,
    sol: &ControlSolution,
    cfg: &SolverConfig,
) -> Result<CertificateReport> {
    riccati_certificate(p, sol, cfg, DEFAULT_SWEEP_BOUND)
}
